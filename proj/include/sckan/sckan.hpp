#pragma once

#include "sckan/backbone.hpp"
#include "sckan/checkpoint.hpp"
#include "sckan/ckaf.hpp"
#include "sckan/config.hpp"
#include "sckan/conv3d.hpp"
#include "sckan/gradcheck.hpp"
#include "sckan/kan.hpp"
#include "sckan/losses.hpp"
#include "sckan/metrics.hpp"
#include "sckan/ops.hpp"
#include "sckan/pcc.hpp"
#include "sckan/phantom.hpp"
#include "sckan/rng.hpp"
#include "sckan/spline.hpp"
#include "sckan/ssd.hpp"
#include "sckan/tensor.hpp"
#include "sckan/trainer.hpp"
#include "sckan/verify.hpp"
#include "sckan/volume.hpp"
