#pragma once

#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/evaluation.hpp"
#include "unidet/geometry.hpp"
#include "unidet/io.hpp"
#include "unidet/labelspace.hpp"
#include "unidet/losses.hpp"
#include "unidet/matching.hpp"
#include "unidet/merge.hpp"
#include "unidet/parallel.hpp"
#include "unidet/pseudogen.hpp"
