#pragma once

#include "beamkit/core.hpp"
#include "beamkit/dataset_io.hpp"
#include "beamkit/decode.hpp"
#include "beamkit/experiment.hpp"
#include "beamkit/metrics.hpp"
#include "beamkit/model.hpp"
#include "beamkit/nn.hpp"
#include "beamkit/ranker.hpp"
#include "beamkit/serialization.hpp"
#include "beamkit/synthetic.hpp"
#include "beamkit/tensor.hpp"
