#pragma once

#include "apr/error.hpp"
#include "apr/numerics.hpp"
#include "apr/text.hpp"
#include "apr/encoder.hpp"
#include "apr/ars.hpp"
#include "apr/model.hpp"
#include "apr/losses.hpp"
#include "apr/optim.hpp"
#include "apr/binary_io.hpp"
#include "apr/corpus.hpp"
#include "apr/checkpoint.hpp"
#include "apr/config.hpp"
#include "apr/trainer.hpp"
#include "apr/retrieval.hpp"
#include "apr/lexical.hpp"
#include "apr/datasets.hpp"
#include "apr/eval.hpp"
#include "apr/bench.hpp"
