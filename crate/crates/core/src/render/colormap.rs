use std::path::Path;

use crate::error::{Error, Result};

const BUILTIN: [(&str, &str); 4] = [
    ("inferno", include_str!("../../assets/inferno.cmap")),
    ("magma", include_str!("../../assets/magma.cmap")),
    ("viridis", include_str!("../../assets/viridis.cmap")),
    ("gray", include_str!("../../assets/gray.cmap")),
];

pub const DEFAULT_COLORMAP: &str = "inferno";

/// 256-entry lookup table from normalized value to RGB.
#[derive(Clone, PartialEq, Eq)]
pub struct Colormap {
    pub name: String,
    pub lut: Box<[[u8; 3]; 256]>,
}

impl std::fmt::Debug for Colormap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Colormap").field("name", &self.name).finish()
    }
}

impl Default for Colormap {
    fn default() -> Self {
        Colormap::builtin(DEFAULT_COLORMAP).expect("default colormap is bundled")
    }
}

impl Colormap {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            Error::param(format!(
                "unknown colormap {name:?}; bundled: {}",
                Colormap::builtin_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        Colormap::parse(name, text)
    }

    /// Parses 256 lines of `r g b` decimal bytes. Blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut lut = Box::new([[0u8; 3]; 256]);
        let mut n = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || {
                Error::param(format!(
                    "colormap {name}: line {} is not \"r g b\": {line:?}",
                    lineno + 1
                ))
            };
            let parts: Vec<u8> = line
                .split_whitespace()
                .map(|p| p.parse::<u8>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(bad());
            }
            if n == 256 {
                return Err(Error::param(format!("colormap {name}: more than 256 entries")));
            }
            lut[n] = [parts[0], parts[1], parts[2]];
            n += 1;
        }
        if n != 256 {
            return Err(Error::param(format!("colormap {name}: {n} entries, need 256")));
        }
        Ok(Colormap {
            name: name.to_string(),
            lut,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        Colormap::parse(name, &text)
    }

    /// A bundled name, or else a path to a colormap file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN.iter().any(|(n, _)| *n == name_or_path) {
            Colormap::builtin(name_or_path)
        } else if Path::new(name_or_path).is_file() {
            Colormap::from_file(name_or_path)
        } else {
            Colormap::builtin(name_or_path)
        }
    }

    /// LUT entry for `v` in `[0, 1]`: index `floor(v * 255 + 0.5)`.
    pub fn lookup(&self, v: f64) -> Result<[u8; 3]> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::param(format!("colorize needs values in [0, 1], got {v}")));
        }
        Ok(self.lut[(v * 255.0 + 0.5).floor() as usize])
    }

    pub fn to_asset_string(&self) -> String {
        self.lut.iter().map(|[r, g, b]| format!("{r} {g} {b}\n")).collect()
    }
}
