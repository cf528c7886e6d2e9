#pragma once

#include "kneealign/adam.hpp"
#include "kneealign/alignment.hpp"
#include "kneealign/config.hpp"
#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"
#include "kneealign/gradcheck.hpp"
#include "kneealign/heatmap.hpp"
#include "kneealign/hourglass.hpp"
#include "kneealign/image.hpp"
#include "kneealign/landmarks.hpp"
#include "kneealign/metrics.hpp"
#include "kneealign/ops.hpp"
#include "kneealign/pipeline.hpp"
#include "kneealign/report.hpp"
#include "kneealign/special.hpp"
#include "kneealign/synth.hpp"
#include "kneealign/tensor.hpp"
#include "kneealign/train.hpp"
#include "kneealign/weights_io.hpp"
#include "kneealign/workflow.hpp"
