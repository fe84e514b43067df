// Single translation unit for the Catch2 amalgamated implementation; every
// test executable links against this object library.
#include <catch2/catch_amalgamated.cpp>
