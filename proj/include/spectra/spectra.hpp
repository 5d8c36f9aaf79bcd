#pragma once

#include "spectra/error.hpp"
#include "spectra/interventions.hpp"
#include "spectra/matrix.hpp"
#include "spectra/report.hpp"
#include "spectra/rng.hpp"
#include "spectra/spectral_diag.hpp"
#include "spectra/srf.hpp"
#include "spectra/stats.hpp"
#include "spectra/svd.hpp"
#include "spectra/tensor_store.hpp"
