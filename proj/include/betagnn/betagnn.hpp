#pragma once

#include "betagnn/attacks.hpp"
#include "betagnn/autodiff.hpp"
#include "betagnn/defenses.hpp"
#include "betagnn/ensemble.hpp"
#include "betagnn/error.hpp"
#include "betagnn/experiment.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/io.hpp"
#include "betagnn/kernels.hpp"
#include "betagnn/models.hpp"
#include "betagnn/optim.hpp"
#include "betagnn/rng.hpp"
#include "betagnn/sbm.hpp"
#include "betagnn/tensor.hpp"
