#pragma once

#include "sc3d/checkpoint.hpp"
#include "sc3d/config.hpp"
#include "sc3d/data_io.hpp"
#include "sc3d/errors.hpp"
#include "sc3d/evaluation.hpp"
#include "sc3d/fusion.hpp"
#include "sc3d/geometry.hpp"
#include "sc3d/network.hpp"
#include "sc3d/sampling.hpp"
#include "sc3d/synthetic.hpp"
#include "sc3d/tensor.hpp"
#include "sc3d/tracker.hpp"
#include "sc3d/training.hpp"
