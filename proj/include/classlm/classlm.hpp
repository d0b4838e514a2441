#pragma once

#include "classlm/clustering.hpp"
#include "classlm/common.hpp"
#include "classlm/context_tree.hpp"
#include "classlm/evaluate.hpp"
#include "classlm/events.hpp"
#include "classlm/feature_map.hpp"
#include "classlm/model_io.hpp"
#include "classlm/models.hpp"
#include "classlm/vocabulary.hpp"
