#ifndef ARDNAS_ARDNAS_HPP
#define ARDNAS_ARDNAS_HPP

#include "ardnas/error.hpp"
#include "ardnas/tensor.hpp"
#include "ardnas/activation.hpp"
#include "ardnas/layers.hpp"
#include "ardnas/network.hpp"
#include "ardnas/curvature.hpp"
#include "ardnas/supergraph.hpp"
#include "ardnas/arch_curvature.hpp"
#include "ardnas/hyper.hpp"
#include "ardnas/groups.hpp"
#include "ardnas/config.hpp"
#include "ardnas/optim.hpp"
#include "ardnas/data.hpp"
#include "ardnas/search.hpp"
#include "ardnas/io.hpp"
#include "ardnas/app.hpp"

#endif  // ARDNAS_ARDNAS_HPP
