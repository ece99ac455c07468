#pragma once

#include "gman/attention.hpp"
#include "gman/calendar.hpp"
#include "gman/data.hpp"
#include "gman/embedding.hpp"
#include "gman/error.hpp"
#include "gman/gradcheck.hpp"
#include "gman/graph.hpp"
#include "gman/io.hpp"
#include "gman/metrics.hpp"
#include "gman/model.hpp"
#include "gman/nn.hpp"
#include "gman/tensor.hpp"
#include "gman/trainer.hpp"
