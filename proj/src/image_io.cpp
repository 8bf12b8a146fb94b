#include "stainforge/image_io.hpp"

#include "stainforge/error.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>

namespace stainforge {

RgbPatch read_png(const std::filesystem::path& path)
{
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw Error(Errc::Io, "cannot read PNG " + path.string() + ": " + image.message);
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw Error(Errc::Io, path.string() + ": only 8-bit PNG images are supported");
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    // transparent pixels are composited on white, the slide background
    png_color background{255, 255, 255};
    if (!png_image_finish_read(&image, &background, buffer.data(), 0, nullptr)) {
        const std::string message = image.message;
        png_image_free(&image);
        throw Error(Errc::Io, "cannot decode PNG " + path.string() + ": " + message);
    }
    return RgbPatch(image.width, image.height, std::move(buffer));
}

void write_png(const std::filesystem::path& path, const RgbPatch& patch)
{
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(patch.width());
    image.height = static_cast<png_uint_32>(patch.height());
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, patch.data().data(), 0, nullptr))
        throw Error(Errc::Io, "cannot write PNG " + path.string() + ": " + image.message);
}

std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path());
    }
    if (ec)
        throw Error(Errc::Io, "cannot list " + dir.string() + ": " + ec.message());
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

} // namespace stainforge
