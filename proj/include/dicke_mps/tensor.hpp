#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dicke_mps/errors.hpp"

namespace dmps {

using cplx = std::complex<double>;
using MatrixXc = Eigen::MatrixXcd;
using RowMatrixXc = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorXc = Eigen::VectorXcd;

/// Dense complex tensor with labelled axes and row-major storage.
///
/// Labels are opaque strings used only to select axes in contractions,
/// permutations and factorisations; two axes of one tensor never share a label.
class DenseTensor {
public:
    DenseTensor() = default;

    DenseTensor(std::vector<std::size_t> shape, std::vector<std::string> labels)
        : shape_(std::move(shape)), labels_(std::move(labels)) {
        check_layout();
        data_.assign(volume(shape_), cplx{0.0, 0.0});
    }

    DenseTensor(std::vector<std::size_t> shape, std::vector<std::string> labels, std::vector<cplx> data)
        : shape_(std::move(shape)), labels_(std::move(labels)), data_(std::move(data)) {
        check_layout();
        if (data_.size() != volume(shape_)) {
            throw DimensionError("DenseTensor: data size does not match product of extents");
        }
    }

    static DenseTensor scalar(cplx value) { return DenseTensor({}, {}, {value}); }

    /// Entries drawn i.i.d. from a complex normal distribution.
    template <class Rng>
    static DenseTensor random(std::vector<std::size_t> shape, std::vector<std::string> labels, Rng& rng) {
        DenseTensor t(std::move(shape), std::move(labels));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.data_) {
            const double re = dist(rng);
            const double im = dist(rng);
            v = {re, im};
        }
        return t;
    }

    static std::size_t volume(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t extent(std::string_view label) const { return shape_[axis(label)]; }

    std::span<cplx> data() noexcept { return data_; }
    std::span<const cplx> data() const noexcept { return data_; }

    bool has_label(std::string_view label) const {
        return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
    }

    std::size_t axis(std::string_view label) const {
        auto it = std::find(labels_.begin(), labels_.end(), label);
        if (it == labels_.end()) {
            throw DimensionError("DenseTensor: no axis labelled '" + std::string(label) + "'");
        }
        return static_cast<std::size_t>(it - labels_.begin());
    }

    cplx& operator()(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
    const cplx& operator()(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

    DenseTensor& relabel(std::string_view from, std::string to) {
        const auto ax = axis(from);
        labels_[ax] = std::move(to);
        check_layout();
        return *this;
    }

    DenseTensor relabeled(std::string_view from, std::string to) const {
        DenseTensor out = *this;
        out.relabel(from, std::move(to));
        return out;
    }

    /// Same shape and data, new labels for every axis.
    DenseTensor with_labels(std::vector<std::string> labels) const {
        return DenseTensor(shape_, std::move(labels), data_);
    }

    /// Row-major reinterpretation with a new shape of equal volume.
    DenseTensor reshaped(std::vector<std::size_t> shape, std::vector<std::string> labels) const {
        if (volume(shape) != data_.size()) {
            throw DimensionError("DenseTensor::reshaped: volume mismatch");
        }
        return DenseTensor(std::move(shape), std::move(labels), data_);
    }

    DenseTensor permuted(const std::vector<std::string>& order) const {
        if (order.size() != rank()) {
            throw DimensionError("DenseTensor::permuted: wrong number of labels");
        }
        std::vector<std::size_t> perm(rank());
        for (std::size_t i = 0; i < rank(); ++i) perm[i] = axis(order[i]);
        return permuted_axes(perm);
    }

    /// perm[i] is the source axis placed at destination position i.
    DenseTensor permuted_axes(const std::vector<std::size_t>& perm) const;

    DenseTensor conj() const {
        DenseTensor out = *this;
        for (auto& v : out.data_) v = std::conj(v);
        return out;
    }

    double norm2() const {
        double s = 0.0;
        for (const auto& v : data_) s += std::norm(v);
        return s;
    }
    double norm() const { return std::sqrt(norm2()); }

    DenseTensor& operator*=(cplx s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    DenseTensor& operator+=(const DenseTensor& other) { return axpy(cplx{1.0, 0.0}, other); }
    DenseTensor& operator-=(const DenseTensor& other) { return axpy(cplx{-1.0, 0.0}, other); }

    /// this += s * other; other is permuted to this tensor's label order if needed.
    DenseTensor& axpy(cplx s, const DenseTensor& other) {
        const DenseTensor* src = &other;
        DenseTensor tmp;
        if (other.labels_ != labels_) {
            tmp = other.permuted(labels_);
            src = &tmp;
        }
        if (src->shape_ != shape_) throw DimensionError("DenseTensor: shape mismatch in addition");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * src->data_[i];
        return *this;
    }

    friend DenseTensor operator*(cplx s, DenseTensor t) { return t *= s; }
    friend DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
    friend DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }

private:
    void check_layout() const {
        if (shape_.size() != labels_.size()) {
            throw DimensionError("DenseTensor: one label per axis required");
        }
        for (auto e : shape_) {
            if (e == 0) throw DimensionError("DenseTensor: extents must be positive");
        }
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            for (std::size_t j = i + 1; j < labels_.size(); ++j) {
                if (labels_[i] == labels_[j]) {
                    throw DimensionError("DenseTensor: duplicate axis label '" + labels_[i] + "'");
                }
            }
        }
    }

    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != rank()) throw DimensionError("DenseTensor: wrong index rank");
        std::size_t off = 0;
        std::size_t ax = 0;
        for (auto i : index) {
            if (i >= shape_[ax]) throw DimensionError("DenseTensor: index out of range");
            off = off * shape_[ax] + i;
            ++ax;
        }
        return off;
    }

    std::vector<std::size_t> shape_;
    std::vector<std::string> labels_;
    std::vector<cplx> data_;
};

inline DenseTensor DenseTensor::permuted_axes(const std::vector<std::size_t>& perm) const {
    const std::size_t r = rank();
    bool identity = true;
    for (std::size_t i = 0; i < r; ++i) identity = identity && perm[i] == i;
    std::vector<std::size_t> new_shape(r);
    std::vector<std::string> new_labels(r);
    for (std::size_t i = 0; i < r; ++i) {
        new_shape[i] = shape_.at(perm[i]);
        new_labels[i] = labels_[perm[i]];
    }
    if (identity) return *this;

    std::vector<std::size_t> src_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) src_stride[i - 1] = src_stride[i] * shape_[i];
    // Stride in the source for each destination axis.
    std::vector<std::size_t> stride(r);
    for (std::size_t i = 0; i < r; ++i) stride[i] = src_stride[perm[i]];

    std::vector<cplx> out(data_.size());
    std::vector<std::size_t> idx(r, 0);
    const std::size_t inner = r ? new_shape[r - 1] : 1;
    const std::size_t inner_stride = r ? stride[r - 1] : 0;
    std::size_t src = 0;
    for (std::size_t dst = 0; dst < out.size(); dst += inner) {
        for (std::size_t k = 0; k < inner; ++k) out[dst + k] = data_[src + k * inner_stride];
        // Advance the multi-index over all but the innermost axis.
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            src += stride[ax];
            if (idx[ax] < new_shape[ax]) break;
            src -= stride[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    return DenseTensor(std::move(new_shape), std::move(new_labels), std::move(out));
}

using AxisPair = std::pair<std::string, std::string>;

/// Sums a and b over the paired axes. The result keeps the free axes of a
/// followed by the free axes of b, each in their original order.
inline DenseTensor contract(const DenseTensor& a, const DenseTensor& b, const std::vector<AxisPair>& pairs) {
    std::vector<bool> a_used(a.rank(), false), b_used(b.rank(), false);
    std::vector<std::size_t> a_con, b_con;
    std::size_t inner = 1;
    for (const auto& [la, lb] : pairs) {
        const auto ia = a.axis(la);
        const auto ib = b.axis(lb);
        if (a.extent(ia) != b.extent(ib)) {
            throw DimensionError("contract: extent mismatch on pair (" + la + ", " + lb + ")");
        }
        if (a_used[ia] || b_used[ib]) throw DimensionError("contract: axis paired twice");
        a_used[ia] = b_used[ib] = true;
        a_con.push_back(ia);
        b_con.push_back(ib);
        inner *= a.extent(ia);
    }
    std::vector<std::size_t> a_perm, b_perm;
    std::vector<std::size_t> out_shape;
    std::vector<std::string> out_labels;
    std::size_t rows = 1, cols = 1;
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (!a_used[i]) {
            a_perm.push_back(i);
            out_shape.push_back(a.extent(i));
            out_labels.push_back(a.labels()[i]);
            rows *= a.extent(i);
        }
    }
    a_perm.insert(a_perm.end(), a_con.begin(), a_con.end());
    b_perm = b_con;
    for (std::size_t i = 0; i < b.rank(); ++i) {
        if (!b_used[i]) {
            b_perm.push_back(i);
            out_shape.push_back(b.extent(i));
            out_labels.push_back(b.labels()[i]);
            cols *= b.extent(i);
        }
    }
    const DenseTensor ap = a.permuted_axes(a_perm);
    const DenseTensor bp = b.permuted_axes(b_perm);
    using CMap = Eigen::Map<const RowMatrixXc>;
    CMap am(ap.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner));
    CMap bm(bp.data().data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
    std::vector<cplx> out(rows * cols);
    Eigen::Map<RowMatrixXc> om(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    om.noalias() = am * bm;
    return DenseTensor(std::move(out_shape), std::move(out_labels), std::move(out));
}

/// Full inner product sum_i conj(a_i) b_i over identically labelled tensors.
inline cplx inner(const DenseTensor& a, const DenseTensor& b) {
    const DenseTensor bp = b.labels() == a.labels() ? b : b.permuted(a.labels());
    if (bp.shape() != a.shape()) throw DimensionError("inner: shape mismatch");
    cplx s{0.0, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a.data()[i]) * bp.data()[i];
    return s;
}

/// Groups the axes of t into a matrix: rows are row_labels (in that order),
/// columns the remaining axes in their original order.
struct MatrixForm {
    RowMatrixXc matrix;
    std::vector<std::size_t> row_shape, col_shape;
    std::vector<std::string> row_labels, col_labels;
};

inline MatrixForm to_matrix(const DenseTensor& t, const std::vector<std::string>& row_labels) {
    MatrixForm f;
    std::vector<std::string> order = row_labels;
    for (const auto& l : row_labels) f.row_shape.push_back(t.extent(l));
    f.row_labels = row_labels;
    for (std::size_t i = 0; i < t.rank(); ++i) {
        const auto& l = t.labels()[i];
        if (std::find(row_labels.begin(), row_labels.end(), l) == row_labels.end()) {
            order.push_back(l);
            f.col_labels.push_back(l);
            f.col_shape.push_back(t.extent(i));
        }
    }
    const DenseTensor p = t.permuted(order);
    const auto rows = static_cast<Eigen::Index>(DenseTensor::volume(f.row_shape));
    const auto cols = static_cast<Eigen::Index>(DenseTensor::volume(f.col_shape));
    f.matrix = Eigen::Map<const RowMatrixXc>(p.data().data(), rows, cols);
    return f;
}

template <class Derived>
DenseTensor from_matrix(const Eigen::MatrixBase<Derived>& m, std::vector<std::size_t> row_shape,
                        std::vector<std::string> row_labels, std::vector<std::size_t> col_shape,
                        std::vector<std::string> col_labels) {
    RowMatrixXc rm = m;
    std::vector<std::size_t> shape = std::move(row_shape);
    shape.insert(shape.end(), col_shape.begin(), col_shape.end());
    std::vector<std::string> labels = std::move(row_labels);
    labels.insert(labels.end(), col_labels.begin(), col_labels.end());
    if (DenseTensor::volume(shape) != static_cast<std::size_t>(rm.size())) {
        throw DimensionError("from_matrix: shape does not match matrix size");
    }
    return DenseTensor(std::move(shape), std::move(labels), std::vector<cplx>(rm.data(), rm.data() + rm.size()));
}

/// Joins two tensors along one axis; all other axes must agree.
inline DenseTensor concatenate(const DenseTensor& a, const DenseTensor& b, std::string_view label) {
    const DenseTensor bp = b.labels() == a.labels() ? b : b.permuted(a.labels());
    const auto ax = a.axis(label);
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (i != ax && a.extent(i) != bp.extent(i)) throw DimensionError("concatenate: extent mismatch");
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= a.extent(i);
    for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.extent(i);
    const std::size_t na = a.extent(ax) * inner, nb = bp.extent(ax) * inner;
    std::vector<cplx> out;
    out.reserve(a.size() + bp.size());
    for (std::size_t o = 0; o < outer; ++o) {
        out.insert(out.end(), a.data().begin() + o * na, a.data().begin() + (o + 1) * na);
        out.insert(out.end(), bp.data().begin() + o * nb, bp.data().begin() + (o + 1) * nb);
    }
    auto shape = a.shape();
    shape[ax] += bp.extent(ax);
    return DenseTensor(std::move(shape), a.labels(), std::move(out));
}

/// Extends one axis with zeros up to new_extent.
inline DenseTensor zero_padded(const DenseTensor& t, std::string_view label, std::size_t new_extent) {
    const auto ax = t.axis(label);
    if (new_extent < t.extent(ax)) throw DimensionError("zero_padded: cannot shrink");
    if (new_extent == t.extent(ax)) return t;
    auto shape = t.shape();
    shape[ax] = new_extent - t.extent(ax);
    return concatenate(t, DenseTensor(std::move(shape), t.labels()), label);
}

// ---------------------------------------------------------------------------
// Factorisations

struct TruncationSpec {
    std::size_t max_rank = 64;
    /// Singular values below rel_tol * s_max are dropped.
    double rel_tol = 1e-12;
    /// Upper bound on the discarded fraction of sum s^2 (0 disables).
    double keep_weight = 0.0;

    void validate() const {
        if (max_rank < 1) throw std::invalid_argument("TruncationSpec: max_rank must be >= 1");
        if (!(rel_tol >= 0.0 && rel_tol < 1.0)) throw std::invalid_argument("TruncationSpec: rel_tol must lie in [0,1)");
        if (!(keep_weight >= 0.0)) throw std::invalid_argument("TruncationSpec: keep_weight must be >= 0");
    }
};

/// Rank kept for a nonincreasing spectrum: the strictest of the three criteria.
inline std::size_t truncation_rank(const std::vector<double>& s, const TruncationSpec& spec) {
    if (s.empty()) return 0;
    std::size_t keep = std::min(spec.max_rank, s.size());
    if (s[0] <= 0.0) return 1;
    if (spec.rel_tol > 0.0) {
        std::size_t k = 0;
        while (k < s.size() && s[k] > spec.rel_tol * s[0]) ++k;
        keep = std::min(keep, std::max<std::size_t>(k, 1));
    }
    if (spec.keep_weight > 0.0) {
        double total = 0.0;
        for (double v : s) total += v * v;
        double tail = 0.0;
        std::size_t k = s.size();
        while (k > 1 && tail + s[k - 1] * s[k - 1] <= spec.keep_weight * total) {
            tail += s[k - 1] * s[k - 1];
            --k;
        }
        keep = std::min(keep, k);
    }
    return std::max<std::size_t>(keep, 1);
}

struct SvdResult {
    DenseTensor U;  ///< left axes + bond
    std::vector<double> s;
    DenseTensor V;  ///< bond + remaining axes
    double discarded_weight = 0.0;
};

/// Truncated SVD splitting t into (left_labels | rest). The new bond axis is
/// called bond_label on both factors.
inline SvdResult svd_truncate(const DenseTensor& t, const std::vector<std::string>& left_labels,
                              const TruncationSpec& spec, const std::string& bond_label = "bond") {
    if (left_labels.empty() || left_labels.size() >= t.rank()) {
        throw DimensionError("svd_truncate: left axes must be a nonempty proper subset");
    }
    const MatrixForm f = to_matrix(t, left_labels);
    const MatrixXc m = f.matrix;
    Eigen::BDCSVD<MatrixXc> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    std::vector<double> s(sv.data(), sv.data() + sv.size());
    const std::size_t k = truncation_rank(s, spec);
    SvdResult r;
    for (std::size_t i = k; i < s.size(); ++i) r.discarded_weight += s[i] * s[i];
    s.resize(k);
    r.s = s;
    const auto kk = static_cast<Eigen::Index>(k);
    r.U = from_matrix(svd.matrixU().leftCols(kk), f.row_shape, f.row_labels, {k}, {bond_label});
    r.V = from_matrix(svd.matrixV().leftCols(kk).adjoint(), {k}, {bond_label}, f.col_shape, f.col_labels);
    return r;
}

/// Scales the bond axis of t by the singular values.
inline DenseTensor scale_axis(DenseTensor t, std::string_view label, const std::vector<double>& s) {
    const auto ax = t.axis(label);
    if (t.extent(ax) != s.size()) throw DimensionError("scale_axis: length mismatch");
    std::size_t inner = 1;
    for (std::size_t i = ax + 1; i < t.rank(); ++i) inner *= t.extent(i);
    const std::size_t n = s.size();
    auto d = t.data();
    for (std::size_t off = 0; off < d.size(); ++off) d[off] *= s[(off / inner) % n];
    return t;
}

/// Thin QR with a real nonnegative diagonal in R, which makes the
/// factorisation unique for full-column-rank input.
inline std::pair<MatrixXc, MatrixXc> thin_qr_positive(const MatrixXc& m) {
    const auto rows = m.rows(), cols = m.cols();
    const auto k = std::min(rows, cols);
    Eigen::HouseholderQR<MatrixXc> qr(m);
    MatrixXc q = qr.householderQ() * MatrixXc::Identity(rows, k);
    MatrixXc r = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < k; ++i) {
        const cplx d = r(i, i);
        const double a = std::abs(d);
        if (a > 0.0) {
            const cplx ph = d / a;
            q.col(i) *= ph;
            r.row(i) *= std::conj(ph);
        }
    }
    return {std::move(q), std::move(r)};
}

}  // namespace dmps
