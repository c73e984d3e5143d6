#pragma once

// Umbrella header: the whole library.
#include "engine.hpp"
