#pragma once

// Umbrella header for the SepViT library: dense tensors with reverse-mode
// autodiff, the separable-attention block family, the hierarchical backbone,
// the MAC/parameter cost analyzer, and the training/evaluation harness.

#include "sepvit/analyzer.hpp"
#include "sepvit/block.hpp"
#include "sepvit/checkpoint.hpp"
#include "sepvit/common.hpp"
#include "sepvit/config.hpp"
#include "sepvit/cost.hpp"
#include "sepvit/dataset.hpp"
#include "sepvit/finite_diff.hpp"
#include "sepvit/harness.hpp"
#include "sepvit/mac_counter.hpp"
#include "sepvit/model.hpp"
#include "sepvit/ops.hpp"
#include "sepvit/rng.hpp"
#include "sepvit/tape.hpp"
#include "sepvit/tensor.hpp"
#include "sepvit/train.hpp"
#include "sepvit/window.hpp"
