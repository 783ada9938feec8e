from codedcast.cli import console_main

console_main()
