#pragma once

#include <grood/dataset.hpp>
#include <grood/detector.hpp>
#include <grood/error.hpp>
#include <grood/gaussian2d.hpp>
#include <grood/linear_probe.hpp>
#include <grood/metrics.hpp>
#include <grood/nearest_mean.hpp>
#include <grood/serialization.hpp>
#include <grood/synthetic.hpp>
