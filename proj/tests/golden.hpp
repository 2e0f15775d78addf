#ifndef OCSC_TESTS_GOLDEN_HPP
#define OCSC_TESTS_GOLDEN_HPP

// The 282-byte captured CAC-move (script deployment) frame used as the
// main codec fixture and seed corpus entry.
#include <string_view>

namespace golden {

inline constexpr std::string_view kScriptDeployHex =
    "4f4353432600f400ffffffffffffffff00000000000000000200000000000000"
    "000000000102000100282f6f70742f636973636f2f616e79636f6e6e6563742f"
    "62696e2f76706e646f776e6c6f616465720000020094224341432d6d6f766509"
    "2d6970633d3337333139092f746d702f2e616348314a3333422f4f6e436f6e6e"
    "6563745f6c6974746c65092f6f70742f636973636f2f616e79636f6e6e656374"
    "2f7363726970742f4f6e436f6e6e6563745f6c6974746c650942344644333833"
    "3645433832463146354235443338343744334132413641423739303244353438"
    "4209736861310931220080050001000600282f6f70742f636973636f2f616e79"
    "636f6e6e6563742f62696e2f76706e646f776e6c6f6164657200";

}  // namespace golden

#endif
