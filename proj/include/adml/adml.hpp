#pragma once

#include "adml/adversarial.hpp"
#include "adml/autodiff.hpp"
#include "adml/eval.hpp"
#include "adml/metalearn.hpp"
#include "adml/models.hpp"
#include "adml/ops.hpp"
#include "adml/params.hpp"
#include "adml/serialize.hpp"
#include "adml/tasks.hpp"
#include "adml/tensor.hpp"
