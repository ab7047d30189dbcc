use dflab_data::{generate_portrait, generate_synthetic_fake, SyntheticFakeConfig};
use dflab_core::ImageTensor;

fn main() {
    let out = std::path::PathBuf::from("/tmp/dflab_dump");
    std::fs::create_dir_all(&out).unwrap();
    // 4x4 grid: top two rows reals, bottom two rows fakes
    let (h, w) = (64usize, 64usize);
    let mut grid = ImageTensor::zeros(3, 4 * h + 12, 4 * w + 12);
    let mut put = |img: &ImageTensor, row: usize, col: usize, grid: &mut ImageTensor| {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    grid.set(c, row * (h + 4) + y, col * (w + 4) + x, img.get(c, y, x));
                }
            }
        }
    };
    for i in 0..8usize {
        let r = generate_portrait(h, w, 1000 + i as u64);
        put(&r, i / 4, i % 4, &mut grid);
    }
    for i in 0..8usize {
        let s = generate_portrait(h, w, 2000 + i as u64);
        let t = generate_portrait(h, w, 3000 + i as u64);
        let f = generate_synthetic_fake(&s, &t, &SyntheticFakeConfig::default(), i as u64).unwrap();
        put(&f, 2 + i / 4, i % 4, &mut grid);
    }
    grid.save_png(&out.join("grid.png")).unwrap();
    println!("wrote {}", out.join("grid.png").display());
}
