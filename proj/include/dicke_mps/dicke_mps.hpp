#pragma once

#include "dicke_mps/errors.hpp"
#include "dicke_mps/tensor.hpp"
#include "dicke_mps/eigensolver.hpp"
#include "dicke_mps/model.hpp"
#include "dicke_mps/mps.hpp"
#include "dicke_mps/mpo.hpp"
#include "dicke_mps/environment.hpp"
#include "dicke_mps/fit.hpp"
#include "dicke_mps/groundstate.hpp"
#include "dicke_mps/observables.hpp"
#include "dicke_mps/rng.hpp"
#include "dicke_mps/record.hpp"
#include "dicke_mps/dynamics.hpp"
#include "dicke_mps/checkpoint.hpp"
#include "dicke_mps/ed.hpp"
#include "dicke_mps/scan.hpp"
