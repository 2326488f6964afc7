#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "dicke_mps/mps.hpp"

namespace dmps {

/// Binary MPS checkpoint: "DMPSCKPT", u32 version, u64 site count, then per
/// site u8 kind, u64 phys_dim, u64 (l, p, r) and the raw complex data,
/// finally i64 centre (-1 when unknown). Little-endian host order; the
/// round trip is bit-exact.
inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'P', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const MPSState& psi) {
    psi.validate();
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put(os, kCheckpointVersion);
    detail::put(os, static_cast<std::uint64_t>(psi.length()));
    for (std::size_t i = 0; i < psi.length(); ++i) {
        const auto& t = psi.sites[i];
        detail::put(os, static_cast<std::uint8_t>(psi.specs[i].kind == SiteKind::oscillator ? 1 : 0));
        detail::put(os, static_cast<std::uint64_t>(psi.specs[i].phys_dim));
        for (const char* ax : {"l", "p", "r"}) detail::put(os, static_cast<std::uint64_t>(t.extent(ax)));
        os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(cplx)));
    }
    detail::put(os, static_cast<std::int64_t>(psi.center ? static_cast<std::int64_t>(*psi.center) : -1));
    if (!os) throw CheckpointError("checkpoint: write failed");
}

inline MPSState read_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw CheckpointError("checkpoint: bad magic");
    const auto version = detail::get<std::uint32_t>(is);
    if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const auto n = detail::get<std::uint64_t>(is);
    if (n == 0 || n > (1u << 20)) throw CheckpointError("checkpoint: implausible site count");
    MPSState psi;
    for (std::uint64_t i = 0; i < n; ++i) {
        SiteSpec s;
        s.kind = detail::get<std::uint8_t>(is) ? SiteKind::oscillator : SiteKind::spin;
        s.phys_dim = detail::get<std::uint64_t>(is);
        const auto l = detail::get<std::uint64_t>(is);
        const auto p = detail::get<std::uint64_t>(is);
        const auto r = detail::get<std::uint64_t>(is);
        if (p != s.phys_dim || l * p * r > (std::uint64_t(1) << 32)) throw CheckpointError("checkpoint: bad site header");
        std::vector<cplx> data(l * p * r);
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(cplx)));
        if (!is) throw CheckpointError("checkpoint: truncated file");
        psi.specs.push_back(s);
        psi.sites.emplace_back(std::vector<std::size_t>{l, p, r}, std::vector<std::string>{"l", "p", "r"}, std::move(data));
    }
    const auto c = detail::get<std::int64_t>(is);
    if (c >= 0) psi.center = static_cast<std::size_t>(c);
    try {
        psi.validate();
    } catch (const DimensionError& e) {
        throw CheckpointError(std::string("checkpoint: inconsistent state: ") + e.what());
    }
    return psi;
}

/// Writes through a temporary file and renames, so a crash never leaves a
/// half-written checkpoint under the final name.
inline void save_checkpoint(const std::filesystem::path& path, const MPSState& psi) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("checkpoint: cannot open " + tmp);
        write_checkpoint(os, psi);
    }
    std::filesystem::rename(tmp, path);
}

inline MPSState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
    return read_checkpoint(is);
}

}  // namespace dmps
