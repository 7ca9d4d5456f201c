#pragma once

#include "kvzap/checkpoint.hpp"
#include "kvzap/container.hpp"
#include "kvzap/errors.hpp"
#include "kvzap/harness.hpp"
#include "kvzap/kvcache.hpp"
#include "kvzap/model.hpp"
#include "kvzap/numerics.hpp"
#include "kvzap/overhead.hpp"
#include "kvzap/parallel.hpp"
#include "kvzap/policies.hpp"
#include "kvzap/rng.hpp"
#include "kvzap/scoring.hpp"
#include "kvzap/surrogate.hpp"
#include "kvzap/tasks.hpp"
#include "kvzap/train.hpp"
#include "kvzap/vocab.hpp"
