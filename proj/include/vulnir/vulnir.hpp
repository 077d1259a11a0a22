#pragma once

#include "vulnir/checkpoint.hpp"
#include "vulnir/corpus.hpp"
#include "vulnir/dataset_io.hpp"
#include "vulnir/errors.hpp"
#include "vulnir/eval.hpp"
#include "vulnir/fsio.hpp"
#include "vulnir/ir_program.hpp"
#include "vulnir/model.hpp"
#include "vulnir/preprocess.hpp"
#include "vulnir/rng.hpp"
#include "vulnir/tokenizer.hpp"
#include "vulnir/training.hpp"
#include "vulnir/vocabulary.hpp"
