#pragma once

#include "leafbench/errors.hpp"
#include "leafbench/tensor.hpp"
#include "leafbench/rng.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/csv.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/image.hpp"
#include "leafbench/layers.hpp"
#include "leafbench/model.hpp"
#include "leafbench/data_source.hpp"
#include "leafbench/metrics.hpp"
#include "leafbench/trainer.hpp"
#include "leafbench/bench.hpp"
#include "leafbench/toy.hpp"
