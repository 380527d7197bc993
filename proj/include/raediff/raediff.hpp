#pragma once

#include "raediff/bgd.hpp"
#include "raediff/denoiser.hpp"
#include "raediff/dtppm.hpp"
#include "raediff/io.hpp"
#include "raediff/metrics.hpp"
#include "raediff/rng.hpp"
#include "raediff/sampler.hpp"
#include "raediff/schedule.hpp"
#include "raediff/tensor.hpp"
