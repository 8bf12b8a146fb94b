// Stand-in scanner transform for exercising the external adapter hook:
// swaps the red and blue channels. Usage: st_channel_swap <in.png> <out.png> <domain>

#include "stainforge/error.hpp"
#include "stainforge/image_io.hpp"

#include <iostream>
#include <utility>

int main(int argc, char** argv)
{
    if (argc != 4) {
        std::cerr << "usage: st_channel_swap <in.png> <out.png> <domain>\n";
        return 1;
    }
    try {
        stainforge::RgbPatch patch = stainforge::read_png(argv[1]);
        auto data = patch.data();
        for (std::size_t i = 0; i < data.size(); i += 3)
            std::swap(data[i], data[i + 2]);
        stainforge::write_png(argv[2], patch);
    } catch (const stainforge::Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 0;
}
