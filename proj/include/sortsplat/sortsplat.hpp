// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/fixtures.hpp"
#include "sortsplat/flip.hpp"
#include "sortsplat/gaussian_math.hpp"
#include "sortsplat/gradients.hpp"
#include "sortsplat/metrics.hpp"
#include "sortsplat/parallel.hpp"
#include "sortsplat/radix_sort.hpp"
#include "sortsplat/rasterizer.hpp"
#include "sortsplat/scene.hpp"
#include "sortsplat/scene_io.hpp"
#include "sortsplat/tile_culling.hpp"
