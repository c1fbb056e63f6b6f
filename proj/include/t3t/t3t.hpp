#pragma once

#include "t3t/config.hpp"
#include "t3t/errors.hpp"
#include "t3t/fusion.hpp"
#include "t3t/gradcheck.hpp"
#include "t3t/io.hpp"
#include "t3t/model.hpp"
#include "t3t/ops.hpp"
#include "t3t/optim.hpp"
#include "t3t/synth.hpp"
#include "t3t/temporal.hpp"
#include "t3t/tensor.hpp"
#include "t3t/train.hpp"
