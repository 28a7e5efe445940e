#pragma once

#include "deltaedit/adam.hpp"
#include "deltaedit/autodiff.hpp"
#include "deltaedit/binary_io.hpp"
#include "deltaedit/bundle.hpp"
#include "deltaedit/checkpoint.hpp"
#include "deltaedit/config.hpp"
#include "deltaedit/delta_space.hpp"
#include "deltaedit/diffusion.hpp"
#include "deltaedit/disentangle.hpp"
#include "deltaedit/edit.hpp"
#include "deltaedit/error.hpp"
#include "deltaedit/experiments.hpp"
#include "deltaedit/interp.hpp"
#include "deltaedit/mapper.hpp"
#include "deltaedit/metrics.hpp"
#include "deltaedit/rng.hpp"
#include "deltaedit/style_predictor.hpp"
#include "deltaedit/synthetic.hpp"
#include "deltaedit/tensor.hpp"
#include "deltaedit/trainer.hpp"
