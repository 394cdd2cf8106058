#ifndef TRAJDIFF_TRAJDIFF_HPP
#define TRAJDIFF_TRAJDIFF_HPP

#include "trajdiff/classify.hpp"
#include "trajdiff/cohort.hpp"
#include "trajdiff/config.hpp"
#include "trajdiff/curriculum.hpp"
#include "trajdiff/diffusion.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/guidance.hpp"
#include "trajdiff/io_util.hpp"
#include "trajdiff/log.hpp"
#include "trajdiff/optim.hpp"
#include "trajdiff/parallel.hpp"
#include "trajdiff/pipeline.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/tape.hpp"
#include "trajdiff/tensor.hpp"

#endif  // TRAJDIFF_TRAJDIFF_HPP
