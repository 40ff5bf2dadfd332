from coopfb.cli import main

main()
