#pragma once

#include <string_view>

#include "skigear/adam.hpp"
#include "skigear/autodiff.hpp"
#include "skigear/error.hpp"
#include "skigear/gear.hpp"
#include "skigear/ingest.hpp"
#include "skigear/model.hpp"
#include "skigear/numerics.hpp"
#include "skigear/preprocess.hpp"
#include "skigear/synthgen.hpp"
#include "skigear/tensor.hpp"
#include "skigear/train.hpp"

namespace skigear {

inline constexpr std::string_view toolkit_version = "1.0.0";

}  // namespace skigear
