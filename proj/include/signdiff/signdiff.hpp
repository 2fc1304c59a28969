#pragma once

// Umbrella header.

#include "signdiff/config.hpp"
#include "signdiff/gradcheck_suite.hpp"
#include "signdiff/metrics.hpp"
#include "signdiff/pipeline.hpp"
#include "signdiff/preprocess.hpp"
#include "signdiff/synthetic.hpp"
#include "signdiff/training.hpp"
