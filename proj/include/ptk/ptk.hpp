#pragma once

#include "ptk/curriculum.hpp"
#include "ptk/error.hpp"
#include "ptk/io.hpp"
#include "ptk/model.hpp"
#include "ptk/partition.hpp"
#include "ptk/patch.hpp"
#include "ptk/point_cloud.hpp"
#include "ptk/sequence.hpp"
#include "ptk/sfc.hpp"
#include "ptk/tokenizer.hpp"
