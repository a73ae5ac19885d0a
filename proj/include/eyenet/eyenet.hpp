#pragma once

#include "eyenet/blocks.hpp"
#include "eyenet/checkpoint.hpp"
#include "eyenet/config.hpp"
#include "eyenet/datapipe.hpp"
#include "eyenet/errors.hpp"
#include "eyenet/gradcheck.hpp"
#include "eyenet/harness.hpp"
#include "eyenet/image_io.hpp"
#include "eyenet/kernels.hpp"
#include "eyenet/labels.hpp"
#include "eyenet/log.hpp"
#include "eyenet/loss.hpp"
#include "eyenet/metrics.hpp"
#include "eyenet/network.hpp"
#include "eyenet/ops.hpp"
#include "eyenet/param_store.hpp"
#include "eyenet/postproc.hpp"
#include "eyenet/rng.hpp"
#include "eyenet/synthetic.hpp"
#include "eyenet/tape.hpp"
#include "eyenet/tensor.hpp"
