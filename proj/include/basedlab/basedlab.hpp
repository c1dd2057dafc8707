// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "basedlab/analysis.hpp"
#include "basedlab/baseconv.hpp"
#include "basedlab/checkpoint.hpp"
#include "basedlab/config.hpp"
#include "basedlab/errors.hpp"
#include "basedlab/feature_maps.hpp"
#include "basedlab/linear_attention.hpp"
#include "basedlab/model.hpp"
#include "basedlab/mqar.hpp"
#include "basedlab/platform.hpp"
#include "basedlab/rng.hpp"
#include "basedlab/sliding_window.hpp"
#include "basedlab/tensor.hpp"
#include "basedlab/theory.hpp"
