#pragma once

// Umbrella header for the core library (no OpenCV dependency). Image I/O
// lives in sekd/io/image_io.hpp.

#include "sekd/core/error.hpp"
#include "sekd/core/random.hpp"
#include "sekd/core/tensor.hpp"
#include "sekd/detect/detector.hpp"
#include "sekd/detect/keypoints.hpp"
#include "sekd/eval/evaluate.hpp"
#include "sekd/eval/homography.hpp"
#include "sekd/eval/matching.hpp"
#include "sekd/evolve/config.hpp"
#include "sekd/evolve/evolve.hpp"
#include "sekd/geometry/affine.hpp"
#include "sekd/geometry/color.hpp"
#include "sekd/geometry/view.hpp"
#include "sekd/geometry/warp.hpp"
#include "sekd/model/checkpoint.hpp"
#include "sekd/model/network.hpp"
#include "sekd/model/params.hpp"
#include "sekd/nn/adam.hpp"
#include "sekd/nn/ops.hpp"
#include "sekd/reliability/reliability.hpp"
#include "sekd/train/describe.hpp"
#include "sekd/train/detector.hpp"
#include "sekd/train/losses.hpp"
#include "sekd/train/pairs.hpp"
