// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "stflow/autodiff.hpp"
#include "stflow/boxcox.hpp"
#include "stflow/checkpoint.hpp"
#include "stflow/csv.hpp"
#include "stflow/datagen.hpp"
#include "stflow/dates.hpp"
#include "stflow/errors.hpp"
#include "stflow/graphs.hpp"
#include "stflow/metrics.hpp"
#include "stflow/model.hpp"
#include "stflow/panel.hpp"
#include "stflow/pipeline.hpp"
#include "stflow/tensor.hpp"
#include "stflow/train.hpp"
