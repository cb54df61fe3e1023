#pragma once

#include "beq/distributions.hpp"
#include "beq/equivalence.hpp"
#include "beq/errors.hpp"
#include "beq/rng.hpp"
#include "beq/pkmodel.hpp"
#include "beq/dataset_io.hpp"
#include "beq/nca.hpp"
#include "beq/nlmem.hpp"
#include "beq/harness.hpp"
