#pragma once

#include "ulw/bytes.hpp"
#include "ulw/checkpoint.hpp"
#include "ulw/complexity.hpp"
#include "ulw/config.hpp"
#include "ulw/config_json.hpp"
#include "ulw/dataset.hpp"
#include "ulw/edf.hpp"
#include "ulw/edf_writer.hpp"
#include "ulw/error.hpp"
#include "ulw/filter.hpp"
#include "ulw/metrics.hpp"
#include "ulw/model.hpp"
#include "ulw/rng.hpp"
#include "ulw/tensor.hpp"
#include "ulw/training.hpp"
