#pragma once

#include "clarinet/conditioning.hpp"
#include "clarinet/datasets.hpp"
#include "clarinet/experiment.hpp"
#include "clarinet/label_space.hpp"
#include "clarinet/layers.hpp"
#include "clarinet/losses.hpp"
#include "clarinet/models.hpp"
#include "clarinet/optim.hpp"
#include "clarinet/oracle.hpp"
#include "clarinet/random.hpp"
#include "clarinet/trainers.hpp"
#include "clarinet/types.hpp"
#include "clarinet/verify.hpp"
