//! Tactile frame pipeline: grayscale + downsampling, background subtraction,
//! threshold filtering and the ContactRate measure.
//!
//! Raw sensor frames are 640×480 RGB. They are reduced to a 64×48 grayscale
//! [`TactileImage`] by averaging the three channels and then averaging each
//! non-overlapping 10×10 block. Both averages round half up, so the pipeline is
//! exactly reproducible in integer arithmetic.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const RAW_WIDTH: usize = 640;
pub const RAW_HEIGHT: usize = 480;
pub const RAW_CHANNELS: usize = 3;

pub const TACTILE_WIDTH: usize = 64;
pub const TACTILE_HEIGHT: usize = 48;
pub const TACTILE_PIXELS: usize = TACTILE_WIDTH * TACTILE_HEIGHT;

const BLOCK: usize = RAW_WIDTH / TACTILE_WIDTH;

/// Default threshold applied to the background difference (0..=255 scale).
pub const DEFAULT_TAU: u8 = 20;

/// Interleaved 8-bit RGB frame as delivered by the sensor.
#[derive(Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * RAW_CHANNELS {
            return Err(Error::shape(
                format!("{} bytes for {width}x{height}x3", width * height * RAW_CHANNELS),
                format!("{} bytes", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Frame of the sensor resolution with every channel set to `value`.
    pub fn filled(value: u8) -> Self {
        Self {
            width: RAW_WIDTH,
            height: RAW_HEIGHT,
            data: vec![value; RAW_WIDTH * RAW_HEIGHT * RAW_CHANNELS],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * RAW_CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * RAW_CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

impl fmt::Debug for RawImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RawImage({}x{}x3)", self.width, self.height)
    }
}

/// 64×48 grayscale frame; the network input and the ContactRate source.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TactileImage {
    pixels: Box<[u8; TACTILE_PIXELS]>,
}

impl TactileImage {
    pub fn filled(value: u8) -> Self {
        Self {
            pixels: Box::new([value; TACTILE_PIXELS]),
        }
    }

    pub fn from_pixels(pixels: &[u8]) -> Result<Self> {
        let arr: [u8; TACTILE_PIXELS] = pixels
            .try_into()
            .map_err(|_| Error::shape(format!("{TACTILE_PIXELS} pixels"), pixels.len()))?;
        Ok(Self {
            pixels: Box::new(arr),
        })
    }

    pub fn pixels(&self) -> &[u8; TACTILE_PIXELS] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8; TACTILE_PIXELS] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * TACTILE_WIDTH + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * TACTILE_WIDTH + x] = value;
    }

    /// Writes the image as binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        write_pgm(w, &self.pixels[..])
    }

    pub fn read_pgm<R: BufRead>(r: R) -> Result<Self> {
        let pixels = read_pgm(r)?;
        Self::from_pixels(&pixels)
    }
}

impl fmt::Debug for TactileImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mean = self.pixels.iter().map(|&p| p as u64).sum::<u64>() as f64 / TACTILE_PIXELS as f64;
        write!(f, "TactileImage(64x48, mean={mean:.2})")
    }
}

/// Thresholded background difference; `true` marks a contact pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryContactMask {
    pixels: Box<[bool; TACTILE_PIXELS]>,
}

impl BinaryContactMask {
    pub fn empty() -> Self {
        Self {
            pixels: Box::new([false; TACTILE_PIXELS]),
        }
    }

    pub fn full() -> Self {
        Self {
            pixels: Box::new([true; TACTILE_PIXELS]),
        }
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let arr: [bool; TACTILE_PIXELS] = bits
            .try_into()
            .map_err(|_| Error::shape(format!("{TACTILE_PIXELS} pixels"), bits.len()))?;
        Ok(Self {
            pixels: Box::new(arr),
        })
    }

    pub fn pixels(&self) -> &[bool; TACTILE_PIXELS] {
        &self.pixels
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.pixels[index] = value;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }

    /// Inspection export: contact pixels as 255, the rest as 0.
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(w, &bytes)
    }
}

impl fmt::Debug for BinaryContactMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryContactMask({} set)", self.count())
    }
}

/// Per-mille share of contact pixels, in `[0, 1000]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct ContactRate(f64);

impl ContactRate {
    pub const ZERO: ContactRate = ContactRate(0.0);

    pub fn from_count(count: usize) -> Self {
        debug_assert!(count <= TACTILE_PIXELS);
        ContactRate(1000.0 * count as f64 / TACTILE_PIXELS as f64)
    }

    /// Wraps an arbitrary value; used for synthetic band checks.
    pub fn new(value: f64) -> Self {
        ContactRate(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for ContactRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.0)
    }
}

/// Grayscale then 10×10 block-mean downsampling.
pub fn preprocess(raw: &RawImage) -> Result<TactileImage> {
    if raw.width != RAW_WIDTH || raw.height != RAW_HEIGHT {
        return Err(Error::shape(
            format!("{RAW_WIDTH}x{RAW_HEIGHT}x3"),
            format!("{}x{}x3", raw.width, raw.height),
        ));
    }
    let mut sums = [0u32; TACTILE_PIXELS];
    for (y, row) in raw.data.chunks_exact(RAW_WIDTH * RAW_CHANNELS).enumerate() {
        let out_row = &mut sums[(y / BLOCK) * TACTILE_WIDTH..][..TACTILE_WIDTH];
        for (x, px) in row.chunks_exact(RAW_CHANNELS).enumerate() {
            let s = px[0] as u32 + px[1] as u32 + px[2] as u32;
            // s/3 never lands on .5, so (s + 1) / 3 is round-half-up.
            out_row[x / BLOCK] += (s + 1) / 3;
        }
    }
    let area = (BLOCK * BLOCK) as u32;
    let mut out = TactileImage::filled(0);
    for (dst, &s) in out.pixels.iter_mut().zip(sums.iter()) {
        *dst = ((s + area / 2) / area) as u8;
    }
    Ok(out)
}

/// `mask[p] = |img[p] - background[p]| > tau`.
pub fn subtract_and_threshold(img: &TactileImage, background: &TactileImage, tau: u8) -> BinaryContactMask {
    let mut mask = BinaryContactMask::empty();
    for ((m, &a), &b) in mask.pixels.iter_mut().zip(img.pixels.iter()).zip(background.pixels.iter()) {
        *m = a.abs_diff(b) > tau;
    }
    mask
}

pub fn contact_rate(mask: &BinaryContactMask) -> ContactRate {
    ContactRate::from_count(mask.count())
}

/// Full pipeline from a preprocessed frame to its ContactRate.
pub fn frame_contact_rate(img: &TactileImage, background: &TactileImage, tau: u8) -> ContactRate {
    let count = img
        .pixels
        .iter()
        .zip(background.pixels.iter())
        .filter(|(&a, &b)| a.abs_diff(b) > tau)
        .count();
    ContactRate::from_count(count)
}

/// Anything that can deliver raw tactile frames and report whether the
/// sensor currently touches something.
pub trait TactileSensor {
    fn read_frame(&mut self) -> RawImage;
    fn in_contact(&self) -> bool;
}

/// Grabs the non-contact reference frame used for background subtraction.
pub fn capture_background<S: TactileSensor + ?Sized>(sensor: &mut S) -> Result<TactileImage> {
    if sensor.in_contact() {
        return Err(Error::BackgroundCapture);
    }
    preprocess(&sensor.read_frame())
}

fn write_pgm<W: Write>(mut w: W, pixels: &[u8]) -> Result<()> {
    write!(w, "P5\n{TACTILE_WIDTH} {TACTILE_HEIGHT}\n255\n")?;
    w.write_all(pixels)?;
    Ok(())
}

fn read_pgm<R: BufRead>(mut r: R) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        let token = next_header_token(&mut r, &mut offset)?;
        fields.push(token);
    }
    if fields[0] != "P5" {
        return Err(Error::format(0, format!("expected P5 magic, found {:?}", fields[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::format(offset, format!("invalid {what} {s:?}")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if width != TACTILE_WIDTH || height != TACTILE_HEIGHT {
        return Err(Error::shape(
            format!("{TACTILE_WIDTH}x{TACTILE_HEIGHT}"),
            format!("{width}x{height}"),
        ));
    }
    if maxval != 255 {
        return Err(Error::format(offset, format!("unsupported maxval {maxval}")));
    }
    let mut pixels = vec![0u8; width * height];
    r.read_exact(&mut pixels)
        .map_err(|_| Error::format(offset, "truncated pixel data"))?;
    Ok(pixels)
}

// Reads one whitespace-delimited header token, skipping `#` comments. The
// single whitespace byte after the token is consumed, as PGM requires.
fn next_header_token<R: BufRead>(r: &mut R, offset: &mut u64) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::format(*offset, "unexpected end of PGM header"));
        }
        *offset += 1;
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut skipped = Vec::new();
            r.read_until(b'\n', &mut skipped)?;
            *offset += skipped.len() as u64;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(c as char);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_raw_maps_to_same_constant() {
        let t = preprocess(&RawImage::filled(100)).unwrap();
        assert!(t.pixels().iter().all(|&p| p == 100));
    }

    #[test]
    fn black_raw_maps_to_zero() {
        let t = preprocess(&RawImage::filled(0)).unwrap();
        assert!(t.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn checkerboard_block_rounds_half_up() {
        let mut raw = RawImage::filled(0);
        for y in 0..RAW_HEIGHT {
            for x in 0..RAW_WIDTH {
                if (x + y) % 2 == 0 {
                    raw.set_pixel(x, y, [255, 255, 255]);
                }
            }
        }
        // 50 × 255 + 50 × 0 over 100 pixels = 127.5
        let t = preprocess(&raw).unwrap();
        assert!(t.pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn grayscale_is_rounded_channel_mean() {
        let mut raw = RawImage::filled(0);
        for y in 0..10 {
            for x in 0..10 {
                raw.set_pixel(x, y, [10, 11, 11]); // 32 / 3 = 10.67 -> 11
            }
        }
        let t = preprocess(&raw).unwrap();
        assert_eq!(t.get(0, 0), 11);
        assert_eq!(t.get(1, 0), 0);
    }

    #[test]
    fn preprocess_rejects_wrong_shape() {
        let raw = RawImage::new(320, 240, vec![0; 320 * 240 * 3]).unwrap();
        assert!(matches!(preprocess(&raw), Err(Error::Shape { .. })));
        assert!(RawImage::new(640, 480, vec![0; 10]).is_err());
    }

    #[test]
    fn self_subtraction_is_empty() {
        let img = TactileImage::filled(77);
        for tau in [0, 20, 255] {
            assert_eq!(subtract_and_threshold(&img, &img, tau).count(), 0);
        }
    }

    #[test]
    fn threshold_is_strict() {
        let bg = TactileImage::filled(40);
        let img = TactileImage::filled(60);
        assert_eq!(subtract_and_threshold(&img, &bg, 20).count(), 0);
        assert_eq!(subtract_and_threshold(&img, &bg, 19).count(), TACTILE_PIXELS);
    }

    #[test]
    fn hundred_pixels_over_threshold() {
        let bg = TactileImage::filled(40);
        let mut img = bg.clone();
        for i in 0..100 {
            img.pixels_mut()[i * 30] = 61;
        }
        let mask = subtract_and_threshold(&img, &bg, 20);
        assert_eq!(mask.count(), 100);
    }

    #[test]
    fn difference_sign_does_not_matter() {
        let bg = TactileImage::filled(100);
        let brighter = TactileImage::filled(130);
        let darker = TactileImage::filled(70);
        assert_eq!(
            subtract_and_threshold(&brighter, &bg, 20),
            subtract_and_threshold(&darker, &bg, 20)
        );
    }

    #[test]
    fn contact_rate_values() {
        assert_eq!(contact_rate(&BinaryContactMask::empty()).value(), 0.0);
        assert_eq!(contact_rate(&BinaryContactMask::full()).value(), 1000.0);
        let mut m = BinaryContactMask::empty();
        for i in 0..123 {
            m.set(i, true);
        }
        // 1000 * 123 / 3072 = 40.0390625
        assert_eq!(contact_rate(&m).value(), 40.0390625);
    }

    #[test]
    fn pgm_round_trip() {
        let mut img = TactileImage::filled(3);
        img.set(5, 7, 200);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n64 48\n255\n"));
        let back = TactileImage::read_pgm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_with_comment_and_truncation() {
        let mut buf = b"P5\n# a comment\n64 48\n255\n".to_vec();
        buf.extend(std::iter::repeat(9).take(TACTILE_PIXELS));
        assert_eq!(TactileImage::read_pgm(&buf[..]).unwrap(), TactileImage::filled(9));
        buf.truncate(buf.len() - 1);
        assert!(matches!(TactileImage::read_pgm(&buf[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_pgm_uses_0_and_255() {
        let mut m = BinaryContactMask::empty();
        m.set(0, true);
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        let body = &buf[buf.len() - TACTILE_PIXELS..];
        assert_eq!(body[0], 255);
        assert!(body[1..].iter().all(|&b| b == 0));
    }

    struct FakeSensor {
        touching: bool,
    }

    impl TactileSensor for FakeSensor {
        fn read_frame(&mut self) -> RawImage {
            RawImage::filled(42)
        }
        fn in_contact(&self) -> bool {
            self.touching
        }
    }

    #[test]
    fn background_capture_requires_no_contact() {
        let bg = capture_background(&mut FakeSensor { touching: false }).unwrap();
        assert_eq!(bg, TactileImage::filled(42));
        assert!(matches!(
            capture_background(&mut FakeSensor { touching: true }),
            Err(Error::BackgroundCapture)
        ));
    }
}
