#pragma once

#include "vremd/backbone.hpp"
#include "vremd/bmd.hpp"
#include "vremd/config.hpp"
#include "vremd/data.hpp"
#include "vremd/eval.hpp"
#include "vremd/heads.hpp"
#include "vremd/hkme.hpp"
#include "vremd/model.hpp"
#include "vremd/nn.hpp"
#include "vremd/pipeline.hpp"
#include "vremd/rng.hpp"
#include "vremd/tensor.hpp"
#include "vremd/trainer.hpp"
