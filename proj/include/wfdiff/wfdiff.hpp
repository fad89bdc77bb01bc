#pragma once

#include "wfdiff/blocks.hpp"
#include "wfdiff/checkpoint.hpp"
#include "wfdiff/config.hpp"
#include "wfdiff/diffusion.hpp"
#include "wfdiff/errors.hpp"
#include "wfdiff/fourier.hpp"
#include "wfdiff/freq_analysis.hpp"
#include "wfdiff/gradcheck.hpp"
#include "wfdiff/imageio.hpp"
#include "wfdiff/losses.hpp"
#include "wfdiff/metrics.hpp"
#include "wfdiff/nn.hpp"
#include "wfdiff/ops.hpp"
#include "wfdiff/pipeline.hpp"
#include "wfdiff/rng.hpp"
#include "wfdiff/synthetic.hpp"
#include "wfdiff/tensor.hpp"
#include "wfdiff/wavelet.hpp"
#include "wfdiff/wfdt.hpp"
