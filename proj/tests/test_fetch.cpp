#include <doctest.h>

TEST_SUITE("fetch") {}
