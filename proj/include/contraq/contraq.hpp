#ifndef CONTRAQ_CONTRAQ_HPP
#define CONTRAQ_CONTRAQ_HPP

#include "contraq/core.hpp"
#include "contraq/seq_model.hpp"
#include "contraq/rates_modulus.hpp"
#include "contraq/spline_volterra.hpp"
#include "contraq/deconv_mixture.hpp"
#include "contraq/experiments.hpp"
#include "contraq/cli_io.hpp"

#endif  // CONTRAQ_CONTRAQ_HPP
