#pragma once

#include "aprnet/tensor.hpp"
#include "aprnet/kernels.hpp"
#include "aprnet/autodiff.hpp"
#include "aprnet/layers.hpp"
#include "aprnet/encoders.hpp"
#include "aprnet/attn_pixamp.hpp"
#include "aprnet/pixy_mod.hpp"
#include "aprnet/attn_musf.hpp"
#include "aprnet/renderer.hpp"
#include "aprnet/image_io.hpp"
#include "aprnet/checkpoint.hpp"
#include "aprnet/data_pipeline.hpp"
#include "aprnet/training.hpp"
#include "aprnet/metrics.hpp"
#include "aprnet/config.hpp"
#include "aprnet/gradcheck.hpp"
