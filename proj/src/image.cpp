#include "fewshot/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "fewshot/error.hpp"
#include "fewshot/kernels.hpp"

namespace fewshot::image {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path.string());
    return f;
}

bool has_png_signature(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    unsigned char sig[8] = {};
    in.read(reinterpret_cast<char*>(sig), 8);
    return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

Image read_png_rgb(const std::filesystem::path& path)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&img, path.c_str()) != 0, ErrorKind::Io,
            "cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    if (png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr) == 0) {
        std::string msg = img.message;
        png_image_free(&img);
        fail(ErrorKind::Io, "cannot decode PNG " + path.string() + ": " + msg);
    }
    return out;
}

struct JpegError {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path)
{
    FilePtr file = open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    JpegError err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    Image out;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        fail(ErrorKind::Io, "cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

void write_png_raw(const std::filesystem::path& path, int width, int height, std::uint32_t format,
                   const std::uint8_t* data)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    if (png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr) == 0)
        fail(ErrorKind::Io, "cannot write PNG " + path.string() + ": " + img.message);
}

int crop_extent(int side, double scale)
{
    return std::clamp(static_cast<int>(std::lround(side * scale)), 1, side);
}

}  // namespace

Image read_image(const std::filesystem::path& path)
{
    return has_png_signature(path) ? read_png_rgb(path) : read_jpeg(path);
}

void write_png(const std::filesystem::path& path, const Image& img)
{
    write_png_raw(path, img.width, img.height, PNG_FORMAT_RGB, img.rgb.data());
}

LabelMap read_labels(const std::filesystem::path& path)
{
    FilePtr file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorKind::Io, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    LabelMap out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::Io, "cannot decode label PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_read_png(png, info, PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_STRIP_ALPHA, nullptr);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int type = png_get_color_type(png, info);
    const int channels = png_get_channels(png, info);
    const bool indexed = type == PNG_COLOR_TYPE_PALETTE || type == PNG_COLOR_TYPE_GRAY;
    png_bytepp rows = png_get_rows(png, info);
    out = LabelMap(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = rows[y][x * channels];  // first channel when not single-channel
    png_destroy_read_struct(&png, &info, nullptr);
    require(indexed || channels >= 1, ErrorKind::Io, "unsupported label PNG " + path.string());
    return out;
}

void write_labels(const std::filesystem::path& path, const LabelMap& labels)
{
    write_png_raw(path, labels.width, labels.height, PNG_FORMAT_GRAY, labels.ids.data());
}

Tensor to_tensor(const Image& img)
{
    Tensor t(Shape{3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* p = img.pixel(x, y);
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) = p[c] / 255.0;
        }
    return t;
}

Image resize_bilinear(const Image& img, int width, int height)
{
    require(img.width > 0 && img.height > 0 && width > 0 && height > 0, ErrorKind::InvalidImage, "resize of empty image");
    if (img.width == width && img.height == height)
        return img;
    std::vector<double> planar(static_cast<std::size_t>(3) * img.width * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                planar[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] = img.pixel(x, y)[c];
    std::vector<double> resized(static_cast<std::size_t>(3) * width * height);
    kernels::resize_bilinear_forward(3, img.height, img.width, height, width, planar.data(), resized.data());
    Image out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = resized[(static_cast<std::size_t>(c) * height + y) * width + x];
                out.pixel(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
    return out;
}

LabelMap resize_nearest(const LabelMap& labels, int width, int height)
{
    require(labels.width > 0 && labels.height > 0 && width > 0 && height > 0, ErrorKind::InvalidImage,
            "resize of empty label map");
    if (labels.width == width && labels.height == height)
        return labels;
    LabelMap out(width, height);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(labels.height - 1, static_cast<int>((y + 0.5) * labels.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(labels.width - 1, static_cast<int>((x + 0.5) * labels.width / width));
            out.at(x, y) = labels.at(sx, sy);
        }
    }
    return out;
}

Image flip_horizontal(const Image& img)
{
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            std::copy_n(img.pixel(img.width - 1 - x, y), 3, out.pixel(x, y));
    return out;
}

LabelMap flip_horizontal(const LabelMap& labels)
{
    LabelMap out(labels.width, labels.height);
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x)
            out.at(x, y) = labels.at(labels.width - 1 - x, y);
    return out;
}

Image center_crop(const Image& img, double scale)
{
    require(scale > 0.0 && scale <= 1.0, ErrorKind::InvalidArgument, "crop scale must be in (0,1]");
    const int w = crop_extent(img.width, scale);
    const int h = crop_extent(img.height, scale);
    const int x0 = (img.width - w) / 2;
    const int y0 = (img.height - h) / 2;
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        std::copy_n(img.pixel(x0, y0 + y), static_cast<std::size_t>(w) * 3, out.pixel(0, y));
    return out;
}

LabelMap center_crop(const LabelMap& labels, double scale)
{
    require(scale > 0.0 && scale <= 1.0, ErrorKind::InvalidArgument, "crop scale must be in (0,1]");
    const int w = crop_extent(labels.width, scale);
    const int h = crop_extent(labels.height, scale);
    const int x0 = (labels.width - w) / 2;
    const int y0 = (labels.height - h) / 2;
    LabelMap out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = labels.at(x0 + x, y0 + y);
    return out;
}

}  // namespace fewshot::image
