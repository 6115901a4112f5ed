#include <doctest.h>

#include "test_support.hpp"
