fn main() {
    println!("splatvote");
}
