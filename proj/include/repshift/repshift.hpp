// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "repshift/attention.hpp"
#include "repshift/cnn_model.hpp"
#include "repshift/compression.hpp"
#include "repshift/error.hpp"
#include "repshift/flops.hpp"
#include "repshift/harness.hpp"
#include "repshift/importance.hpp"
#include "repshift/log.hpp"
#include "repshift/model_io.hpp"
#include "repshift/run_config.hpp"
#include "repshift/synthetic.hpp"
#include "repshift/tensor.hpp"
#include "repshift/vit_model.hpp"
