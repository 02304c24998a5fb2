use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::error::Result;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Wraps `reader` in a gzip decoder when the stream starts with the gzip magic bytes.
pub fn decompressing_reader<'a, R: Read + 'a>(reader: R) -> Result<Box<dyn BufRead + 'a>> {
    let mut buffered = BufReader::with_capacity(1 << 16, reader);
    let head = buffered.fill_buf()?;
    if head.len() >= 2 && head[..2] == GZIP_MAGIC {
        Ok(Box::new(BufReader::with_capacity(
            1 << 16,
            MultiGzDecoder::new(buffered),
        )))
    } else {
        Ok(Box::new(buffered))
    }
}

/// Opens a plain or gzip-compressed file.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    decompressing_reader(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn plain_and_gzip_streams_read_identically() {
        let text = b"sample_id\tX1\ns1\tA\n";
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(text).unwrap();
        let gz = enc.finish().unwrap();

        let mut plain = String::new();
        decompressing_reader(&text[..])
            .unwrap()
            .read_to_string(&mut plain)
            .unwrap();
        let mut unzipped = String::new();
        decompressing_reader(&gz[..])
            .unwrap()
            .read_to_string(&mut unzipped)
            .unwrap();
        assert_eq!(plain, unzipped);
    }

    #[test]
    fn empty_stream_is_fine() {
        let mut s = String::new();
        decompressing_reader(&b""[..])
            .unwrap()
            .read_to_string(&mut s)
            .unwrap();
        assert!(s.is_empty());
    }
}
