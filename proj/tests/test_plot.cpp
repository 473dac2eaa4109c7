#include <doctest.h>

TEST_SUITE("plot") {}
