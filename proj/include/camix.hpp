#pragma once

#include "camix/camx_io.hpp"
#include "camix/checkpoint.hpp"
#include "camix/config.hpp"
#include "camix/context_mask.hpp"
#include "camix/dataset.hpp"
#include "camix/errors.hpp"
#include "camix/evaluation.hpp"
#include "camix/grid.hpp"
#include "camix/kernels.hpp"
#include "camix/losses.hpp"
#include "camix/mixup.hpp"
#include "camix/netpbm.hpp"
#include "camix/rng.hpp"
#include "camix/scene.hpp"
#include "camix/segmenter.hpp"
#include "camix/significance.hpp"
#include "camix/spatial_prior.hpp"
#include "camix/tensor.hpp"
#include "camix/trainer.hpp"
