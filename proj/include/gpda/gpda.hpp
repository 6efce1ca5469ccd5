// Umbrella header.
#pragma once

#include "gpda/baselines.hpp"
#include "gpda/checkpoint.hpp"
#include "gpda/datagen.hpp"
#include "gpda/diffmath.hpp"
#include "gpda/featurenet.hpp"
#include "gpda/gp_head.hpp"
#include "gpda/labeled.hpp"
#include "gpda/objectives.hpp"
#include "gpda/trainer.hpp"
#include "gpda/uncertainty.hpp"
