#include "stbpu/bits.hpp"

namespace stbpu {

std::string BitVec::to_hex() const
{
    static constexpr char digits[] = "0123456789abcdef";
    const unsigned nibbles = width_ == 0 ? 1 : (width_ + 3) / 4;
    std::string s(nibbles, '0');
    for (unsigned i = 0; i < nibbles; ++i)
        s[nibbles - 1 - i] = digits[slice(4 * i, 4)];
    return "0x" + s;
}

} // namespace stbpu
