//! Canonical byte encoding shared by every signed or digested structure.
//!
//! A value is a sequence of fields. Each field is written as a 4-byte
//! big-endian length followed by that many bytes, and fields are
//! concatenated in declared order. Integers are 8-byte big-endian fields,
//! nested structures are a single field holding their own encoding, and
//! lists are a count field followed by one field per item.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input ended inside a field (wanted {wanted} bytes, {available} left)")]
    Truncated { wanted: usize, available: usize },
    #[error("{0} trailing bytes after the last field")]
    Trailing(usize),
    #[error("integer field has length {0}, expected 8")]
    BadInteger(usize),
    #[error("field is not valid UTF-8")]
    BadUtf8,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{0}")]
    Invalid(&'static str),
}

/// Accumulates canonical fields.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes a raw byte with no length prefix. Only used for wire tags.
    pub fn tag(&mut self, tag: u8) -> &mut Self {
        self.buf.push(tag);
        self
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("canonical field exceeds 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    pub fn nested<T: Canonical>(&mut self, value: &T) -> &mut Self {
        self.field(&value.to_canonical())
    }

    pub fn list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.u64(items.len() as u64);
        for item in items {
            self.nested(item);
        }
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

/// Reads canonical fields back out of a byte slice.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    rest: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.rest.len() < n {
            return Err(DecodeError::Truncated {
                wanted: n,
                available: self.rest.len(),
            });
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    pub fn tag(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn field(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.take(4)?;
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        self.take(len)
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let raw = self.field()?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::BadUtf8)
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let raw = self.field()?;
        let arr: [u8; 8] = raw
            .try_into()
            .map_err(|_| DecodeError::BadInteger(raw.len()))?;
        Ok(u64::from_be_bytes(arr))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let raw = self.field()?;
        raw.try_into()
            .map_err(|_| DecodeError::Invalid("fixed-width field has wrong length"))
    }

    pub fn nested<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::from_canonical(self.field()?)
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let count = self.u64()?;
        // Every item costs at least a 4-byte prefix; reject counts the input cannot hold.
        if count > (self.rest.len() / 4) as u64 {
            return Err(DecodeError::Invalid("list count exceeds input"));
        }
        (0..count).map(|_| self.nested()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing(self.rest.len()))
        }
    }
}

/// A type with a single canonical byte representation.
pub trait Canonical: Sized {
    fn encode_into(&self, enc: &mut Encoder);

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn to_canonical(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }

    fn from_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

impl Canonical for Vec<u8> {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(self);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(dec.field()?.to_vec())
    }
}

impl Canonical for String {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.string()
    }
}
