#pragma once

#include "vzip/attention.hpp"
#include "vzip/error.hpp"
#include "vzip/flops.hpp"
#include "vzip/manifest.hpp"
#include "vzip/merger.hpp"
#include "vzip/npy.hpp"
#include "vzip/pipeline.hpp"
#include "vzip/redundancy.hpp"
#include "vzip/report.hpp"
#include "vzip/selector.hpp"
#include "vzip/stack.hpp"
#include "vzip/tensor.hpp"
#include "vzip/toy_encoder.hpp"
