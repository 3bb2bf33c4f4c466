#pragma once

#include "vitmat/adam.hpp"
#include "vitmat/augment.hpp"
#include "vitmat/checkpoint.hpp"
#include "vitmat/data.hpp"
#include "vitmat/errors.hpp"
#include "vitmat/eval.hpp"
#include "vitmat/grad_check.hpp"
#include "vitmat/image.hpp"
#include "vitmat/loss.hpp"
#include "vitmat/ops.hpp"
#include "vitmat/rng.hpp"
#include "vitmat/synthetic.hpp"
#include "vitmat/tensor.hpp"
#include "vitmat/train.hpp"
#include "vitmat/vit.hpp"
