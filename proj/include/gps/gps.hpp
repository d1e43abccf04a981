#pragma once

#include "gps/config.hpp"
#include "gps/corrgraph.hpp"
#include "gps/error.hpp"
#include "gps/featops.hpp"
#include "gps/gcn.hpp"
#include "gps/gradcheck.hpp"
#include "gps/losses.hpp"
#include "gps/model.hpp"
#include "gps/ontology.hpp"
#include "gps/retrieval.hpp"
#include "gps/sampler.hpp"
#include "gps/synthgen.hpp"
#include "gps/trainer.hpp"
#include "gps/types.hpp"
#include "gps/util.hpp"
