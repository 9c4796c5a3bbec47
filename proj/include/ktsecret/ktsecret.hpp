#ifndef KTSECRET_KTSECRET_HPP
#define KTSECRET_KTSECRET_HPP

#include "numerics.hpp"
#include "encoding.hpp"
#include "kinetics.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "cs_recon.hpp"
#include "neural.hpp"
#include "learn_recon.hpp"
#include "io.hpp"
#include "pipeline.hpp"

#endif
