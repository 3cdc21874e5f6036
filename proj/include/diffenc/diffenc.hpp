#pragma once

#include "diffenc/checkpoint.hpp"
#include "diffenc/data.hpp"
#include "diffenc/diffusion_process.hpp"
#include "diffenc/encoder.hpp"
#include "diffenc/error.hpp"
#include "diffenc/io.hpp"
#include "diffenc/model.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/objective.hpp"
#include "diffenc/rng.hpp"
#include "diffenc/sampler.hpp"
#include "diffenc/schedule.hpp"
#include "diffenc/tensor.hpp"
#include "diffenc/train.hpp"
#include "diffenc/verify.hpp"
